//! Single-beat TL-UL style bus host and memory-mapped device models.
//!
//! The host is always ready: one operation per cycle, response in the next
//! cycle. A Get returns the register value sampled on the request cycle and
//! a PutFullData lands on the same edge; either way the device is then
//! clocked once. Devices decode only the low `address_width` bits of the
//! address, like a peripheral register block behind a crossbar.
//!
//! Unmapped reads return zero and unmapped or read-only writes are dropped;
//! both set the host's sticky error flag rather than crashing the test.

pub mod lock_periph;
pub mod timer;

use std::fmt;

pub use lock_periph::LockPeripheral;
pub use timer::TimerDevice;

use crate::coverage::{EdgeSink, Site, Tracer};
use crate::dut::{DutSnapshot, FsmState};
use crate::error::SnapshotError;

const SITE_GET: Site = Site::bus(0x0201);
const SITE_PUT: Site = Site::bus(0x0202);
const SITE_IDLE: Site = Site::bus(0x0203);
const SITE_GET_ERROR: Site = Site::bus(0x0204);
const SITE_PUT_ERROR: Site = Site::bus(0x0205);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    ReadWrite,
    ReadOnly,
    WriteOnly,
}

impl fmt::Display for Access {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Access::ReadWrite => "rw",
            Access::ReadOnly => "ro",
            Access::WriteOnly => "wo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegisterInfo {
    pub offset: u32,
    pub name: &'static str,
    pub access: Access,
    pub description: &'static str,
}

/// A peripheral controlled through memory-mapped registers.
pub trait MmioDevice {
    fn name(&self) -> String;

    fn register_map(&self) -> &'static [RegisterInfo];

    /// Number of low address bits the register block decodes.
    fn address_width(&self) -> u32;

    /// Register read at `offset`; `None` if nothing readable is mapped there.
    fn read(&mut self, offset: u32, tracer: &mut Tracer) -> Option<u32>;

    /// Register write at `offset`; false if the write was dropped.
    fn write(&mut self, offset: u32, data: u32, tracer: &mut Tracer) -> bool;

    /// Advances the device one clock.
    fn tick(&mut self, tracer: &mut Tracer);

    /// One clock with the device reset asserted.
    fn reset_cycle(&mut self, tracer: &mut Tracer);

    /// Rebuilds the device from its configuration.
    fn power_on(&mut self);

    fn check_assertions(&mut self) -> Option<&'static str>;

    fn rearm_assertions(&mut self);

    fn snapshot(&self) -> DutSnapshot;

    fn restore(&mut self, snapshot: &DutSnapshot) -> Result<(), SnapshotError>;

    fn fsm_state(&self) -> Option<FsmState> {
        None
    }
}

/// Bus host with one attached device.
#[derive(Debug, Clone)]
pub struct BusHost<D> {
    device: D,
    error: bool,
}

impl<D: MmioDevice> BusHost<D> {
    pub fn new(device: D) -> Self {
        BusHost { device, error: false }
    }

    pub fn device(&self) -> &D {
        &self.device
    }

    pub fn device_mut(&mut self) -> &mut D {
        &mut self.device
    }

    fn offset(&self, addr: u32) -> u32 {
        let w = self.device.address_width();
        if w >= 32 {
            addr
        } else {
            addr & ((1 << w) - 1)
        }
    }

    /// TL-UL Get.
    pub fn get(&mut self, addr: u32, tracer: &mut Tracer) -> u32 {
        tracer.hit(SITE_GET);
        let offset = self.offset(addr);
        let value = match self.device.read(offset, tracer) {
            Some(v) => v,
            None => {
                tracer.hit(SITE_GET_ERROR);
                self.error = true;
                0
            }
        };
        self.device.tick(tracer);
        value
    }

    /// TL-UL PutFullData with all byte lanes enabled.
    pub fn put_full(&mut self, addr: u32, data: u32, tracer: &mut Tracer) {
        tracer.hit(SITE_PUT);
        let offset = self.offset(addr);
        if !self.device.write(offset, data, tracer) {
            tracer.hit(SITE_PUT_ERROR);
            self.error = true;
        }
        self.device.tick(tracer);
    }

    /// A cycle with no transaction.
    pub fn idle(&mut self, tracer: &mut Tracer) {
        tracer.hit(SITE_IDLE);
        self.device.tick(tracer);
    }

    /// Sticky flag set by any unmapped or dropped access.
    pub fn error_flag(&self) -> bool {
        self.error
    }

    pub fn clear_error(&mut self) {
        self.error = false;
    }
}

/// Renders a register map as a markdown table.
pub fn register_map_markdown(map: &[RegisterInfo]) -> String {
    let mut out = String::from("| Offset | Name | Access | Description |\n|--------|------|--------|-------------|\n");
    for r in map {
        out.push_str(&format!("| 0x{:02X} | {} | {} | {} |\n", r.offset, r.name, r.access, r.description));
    }
    out
}

/// Register map of a device by CLI name (`timer` or `lock`).
pub fn register_map_by_name(name: &str) -> Option<&'static [RegisterInfo]> {
    match name {
        "timer" => Some(timer::REGISTERS),
        "lock" | "lock_periph" | "lock-periph" => Some(lock_periph::REGISTERS),
        _ => None,
    }
}
