//! Test harnesses: turn one fuzzer-generated byte string into a
//! cycle-accurate stimulus and classify the result.
//!
//! [`GenericHarness`] slices the bytes across the model's input ports, one
//! clock cycle per slice. [`BusHarness`] decodes the bytes as bus
//! instructions and performs the corresponding transactions.
//!
//! Both start every test from the post-reset state. With
//! [`ForkPoint::AtStart`] that state is rebuilt each time (power-on plus
//! [`RESET_CYCLES`](crate::RESET_CYCLES) reset cycles, untraced); with
//! [`ForkPoint::AfterReset`] a snapshot taken once after reset is restored.
//! The two modes give identical outcomes and differ only in cost.

use serde::{Deserialize, Serialize};

use crate::bus::{BusHost, MmioDevice};
use crate::coverage::{CoverageMap, EdgeSink, FsmCoverage, ScopeFilter, Site, Tracer};
use crate::dut::{DutModel, DutSnapshot, FsmState, Port};
use crate::grammar::{DecodeEvent, Decoder, Encoding, Instruction};
use crate::RESET_CYCLES;

const SITE_GEN_ENTER: Site = Site::harness(0x0501);
const SITE_GEN_LOOP: Site = Site::harness(0x0502);
const SITE_GEN_PORT_FULL: Site = Site::harness(0x0503);
const SITE_GEN_PORT_PARTIAL: Site = Site::harness(0x0504);
const SITE_GEN_EVAL_CHANGED: Site = Site::harness(0x0505);
const SITE_GEN_EVAL_SETTLED: Site = Site::harness(0x0506);
const SITE_GEN_EXIT: Site = Site::harness(0x0507);
const SITE_GEN_ABORT: Site = Site::harness(0x0508);

const SITE_BUS_ENTER: Site = Site::harness(0x0601);
const SITE_BUS_WAIT: Site = Site::harness(0x0602);
const SITE_BUS_READ: Site = Site::harness(0x0603);
const SITE_BUS_WRITE: Site = Site::harness(0x0604);
const SITE_BUS_INVALID: Site = Site::harness(0x0605);
const SITE_BUS_TRUNCATED: Site = Site::harness(0x0606);
const SITE_BUS_EXIT: Site = Site::harness(0x0607);
const SITE_BUS_ABORT: Site = Site::harness(0x0608);

/// Where each test starts from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForkPoint {
    /// Rebuild and reset the model for every test.
    AtStart,
    /// Restore a snapshot captured once after reset.
    #[default]
    AfterReset,
}

impl ForkPoint {
    pub fn label(self) -> &'static str {
        match self {
            ForkPoint::AtStart => "at_start",
            ForkPoint::AfterReset => "after_reset",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Status {
    Ok,
    /// An assertion fired after the edge of (1-based) cycle `cycle`.
    Crash { assertion: &'static str, cycle: u64 },
}

impl Status {
    pub fn is_crash(&self) -> bool {
        matches!(self, Status::Crash { .. })
    }
}

/// Cheap per-test summary; the coverage map stays in the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Execution {
    pub status: Status,
    pub executed_cycles: u64,
    pub decoded_instructions: u64,
    /// Reset cycles simulated before the test proper (0 with a warm start).
    pub reset_cycles: u64,
}

/// Full result of one test, including its coverage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestOutcome {
    pub status: Status,
    pub executed_cycles: u64,
    pub decoded_instruction_count: u64,
    pub coverage: CoverageMap,
    pub fsm_visited: Option<FsmCoverage>,
}

pub trait Harness {
    fn execute(&mut self, input: &[u8]) -> Execution;

    /// Edge map of the last execution.
    fn coverage(&self) -> &CoverageMap;

    /// FSM states visited by the last execution, for models that have one.
    fn fsm_visited(&self) -> Option<&FsmCoverage>;

    fn fork_point(&self) -> ForkPoint;

    fn describe(&self) -> String;

    fn run(&mut self, input: &[u8]) -> TestOutcome {
        let e = self.execute(input);
        TestOutcome {
            status: e.status,
            executed_cycles: e.executed_cycles,
            decoded_instruction_count: e.decoded_instructions,
            coverage: self.coverage().clone(),
            fsm_visited: self.fsm_visited().cloned(),
        }
    }
}

impl<H: Harness + ?Sized> Harness for Box<H> {
    fn execute(&mut self, input: &[u8]) -> Execution {
        (**self).execute(input)
    }
    fn coverage(&self) -> &CoverageMap {
        (**self).coverage()
    }
    fn fsm_visited(&self) -> Option<&FsmCoverage> {
        (**self).fsm_visited()
    }
    fn fork_point(&self) -> ForkPoint {
        (**self).fork_point()
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

fn fsm_for(state: Option<FsmState>) -> Option<FsmCoverage> {
    state.map(|s| FsmCoverage::new(s.num_states))
}

fn visit(fsm: &mut Option<FsmCoverage>, state: Option<FsmState>) {
    if let (Some(f), Some(s)) = (fsm.as_mut(), state) {
        f.visit(s.state);
    }
}

/// Port-mapping harness: every cycle reads `ceil(width / 8)` bytes for each
/// input port in declaration order, then advances the clock once.
///
/// A port that runs out of bytes part way is zero-filled (as are any later
/// ports in that cycle) and the test ends after that cycle.
pub struct GenericHarness<D> {
    dut: D,
    ports: Vec<Port>,
    fork_point: ForkPoint,
    tracer: Tracer,
    post_reset: DutSnapshot,
    fsm: Option<FsmCoverage>,
    inputs: Vec<u64>,
    prev_inputs: Vec<u64>,
}

impl<D: DutModel> GenericHarness<D> {
    pub fn new(mut dut: D, fork_point: ForkPoint, scope: ScopeFilter) -> Self {
        let mut tracer = Tracer::new(scope);
        let post_reset = cold_start_dut(&mut dut, &mut tracer);
        let ports = dut.input_ports().to_vec();
        let fsm = fsm_for(dut.fsm_state());
        let n = ports.len();
        GenericHarness {
            dut,
            ports,
            fork_point,
            tracer,
            post_reset,
            fsm,
            inputs: vec![0; n],
            prev_inputs: vec![0; n],
        }
    }

    pub fn dut(&self) -> &D {
        &self.dut
    }

    /// Bytes consumed per clock cycle.
    pub fn bytes_per_cycle(&self) -> usize {
        self.ports.iter().map(Port::byte_len).sum()
    }

    fn prepare(&mut self) -> u64 {
        let reset_cycles = match self.fork_point {
            ForkPoint::AtStart => {
                cold_start_dut(&mut self.dut, &mut self.tracer);
                RESET_CYCLES
            }
            ForkPoint::AfterReset => {
                self.dut.restore(&self.post_reset).expect("snapshot from the same model");
                0
            }
        };
        self.tracer.reset();
        self.dut.rearm_assertions();
        self.inputs.iter_mut().for_each(|v| *v = 0);
        self.prev_inputs.iter_mut().for_each(|v| *v = 0);
        if let Some(f) = self.fsm.as_mut() {
            f.clear();
        }
        visit(&mut self.fsm, self.dut.fsm_state());
        reset_cycles
    }
}

fn cold_start_dut<D: DutModel>(dut: &mut D, tracer: &mut Tracer) -> DutSnapshot {
    dut.power_on();
    tracer.set_enabled(false);
    for _ in 0..RESET_CYCLES {
        dut.reset_cycle(tracer);
    }
    tracer.set_enabled(true);
    dut.snapshot()
}

impl<D: DutModel> Harness for GenericHarness<D> {
    fn execute(&mut self, input: &[u8]) -> Execution {
        let reset_cycles = self.prepare();
        let t = &mut self.tracer;
        t.hit(SITE_GEN_ENTER);
        let mut pos = 0;
        let mut cycles = 0;
        let mut status = Status::Ok;
        while pos < input.len() {
            t.hit(SITE_GEN_LOOP);
            for (slot, port) in self.inputs.iter_mut().zip(&self.ports) {
                let want = port.byte_len();
                let take = want.min(input.len() - pos);
                let mut raw = [0u8; 8];
                raw[..take].copy_from_slice(&input[pos..pos + take]);
                pos += take;
                t.hit(if take == want { SITE_GEN_PORT_FULL } else { SITE_GEN_PORT_PARTIAL });
                *slot = u64::from_le_bytes(raw) & port.mask();
            }
            t.hit(if self.inputs != self.prev_inputs { SITE_GEN_EVAL_CHANGED } else { SITE_GEN_EVAL_SETTLED });
            self.prev_inputs.copy_from_slice(&self.inputs);
            self.dut.cycle(&self.inputs, t);
            cycles += 1;
            visit(&mut self.fsm, self.dut.fsm_state());
            if let Some(assertion) = self.dut.check_assertions() {
                t.hit(SITE_GEN_ABORT);
                status = Status::Crash { assertion, cycle: cycles };
                break;
            }
        }
        if status == Status::Ok {
            t.hit(SITE_GEN_EXIT);
        }
        Execution { status, executed_cycles: cycles, decoded_instructions: 0, reset_cycles }
    }

    fn coverage(&self) -> &CoverageMap {
        self.tracer.map()
    }

    fn fsm_visited(&self) -> Option<&FsmCoverage> {
        self.fsm.as_ref()
    }

    fn fork_point(&self) -> ForkPoint {
        self.fork_point
    }

    fn describe(&self) -> String {
        format!("generic:{}", self.dut.name())
    }
}

/// Bus-centric harness: decodes the bytes into wait/read/write instructions
/// and performs one bus operation (one clock cycle) per instruction.
pub struct BusHarness<D> {
    host: BusHost<D>,
    encoding: Encoding,
    fork_point: ForkPoint,
    tracer: Tracer,
    post_reset: DutSnapshot,
    fsm: Option<FsmCoverage>,
}

impl<D: MmioDevice> BusHarness<D> {
    pub fn new(device: D, encoding: Encoding, fork_point: ForkPoint, scope: ScopeFilter) -> Self {
        let mut host = BusHost::new(device);
        let mut tracer = Tracer::new(scope);
        let post_reset = cold_start_device(&mut host, &mut tracer);
        let fsm = fsm_for(host.device().fsm_state());
        BusHarness { host, encoding, fork_point, tracer, post_reset, fsm }
    }

    pub fn host(&self) -> &BusHost<D> {
        &self.host
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    fn prepare(&mut self) -> u64 {
        let reset_cycles = match self.fork_point {
            ForkPoint::AtStart => {
                cold_start_device(&mut self.host, &mut self.tracer);
                RESET_CYCLES
            }
            ForkPoint::AfterReset => {
                self.host.device_mut().restore(&self.post_reset).expect("snapshot from the same device");
                0
            }
        };
        self.host.clear_error();
        self.tracer.reset();
        self.host.device_mut().rearm_assertions();
        if let Some(f) = self.fsm.as_mut() {
            f.clear();
        }
        visit(&mut self.fsm, self.host.device().fsm_state());
        reset_cycles
    }
}

fn cold_start_device<D: MmioDevice>(host: &mut BusHost<D>, tracer: &mut Tracer) -> DutSnapshot {
    host.device_mut().power_on();
    host.clear_error();
    tracer.set_enabled(false);
    for _ in 0..RESET_CYCLES {
        host.device_mut().reset_cycle(tracer);
    }
    tracer.set_enabled(true);
    host.device().snapshot()
}

impl<D: MmioDevice> Harness for BusHarness<D> {
    fn execute(&mut self, input: &[u8]) -> Execution {
        let reset_cycles = self.prepare();
        let t = &mut self.tracer;
        t.hit(SITE_BUS_ENTER);
        let mut cycles = 0;
        let mut decoded = 0;
        let mut status = Status::Ok;
        for event in Decoder::new(input, self.encoding) {
            let instr = match event {
                DecodeEvent::Invalid(_) => {
                    t.hit(SITE_BUS_INVALID);
                    continue;
                }
                DecodeEvent::Truncated(_) => {
                    t.hit(SITE_BUS_TRUNCATED);
                    continue;
                }
                DecodeEvent::Instruction(i) => i,
            };
            decoded += 1;
            match instr {
                Instruction::Wait => {
                    t.hit(SITE_BUS_WAIT);
                    self.host.idle(t);
                }
                Instruction::Read { address } => {
                    t.hit(SITE_BUS_READ);
                    self.host.get(address, t);
                }
                Instruction::Write { address, data } => {
                    t.hit(SITE_BUS_WRITE);
                    self.host.put_full(address, data, t);
                }
            }
            cycles += 1;
            visit(&mut self.fsm, self.host.device().fsm_state());
            if let Some(assertion) = self.host.device_mut().check_assertions() {
                t.hit(SITE_BUS_ABORT);
                status = Status::Crash { assertion, cycle: cycles };
                break;
            }
        }
        if status == Status::Ok {
            t.hit(SITE_BUS_EXIT);
        }
        Execution { status, executed_cycles: cycles, decoded_instructions: decoded, reset_cycles }
    }

    fn coverage(&self) -> &CoverageMap {
        self.tracer.map()
    }

    fn fsm_visited(&self) -> Option<&FsmCoverage> {
        self.fsm.as_ref()
    }

    fn fork_point(&self) -> ForkPoint {
        self.fork_point
    }

    fn describe(&self) -> String {
        format!("bus[{}]:{}", self.encoding.label(), self.host.device().name())
    }
}
