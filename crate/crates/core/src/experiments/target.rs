use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bus::{LockPeripheral, TimerDevice};
use crate::coverage::ScopeFilter;
use crate::dut::{LockConfig, LockDut};
use crate::error::ConfigError;
use crate::grammar::Encoding;
use crate::harness::{BusHarness, ForkPoint, GenericHarness, Harness};

/// Device families that can be fuzzed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Device {
    /// The bare lock behind the port-mapping harness.
    #[default]
    Lock,
    /// The lock behind a register interface, driven over the bus.
    LockPeriph,
    /// The timer, driven over the bus.
    Timer,
}

impl Device {
    pub fn label(self) -> &'static str {
        match self {
            Device::Lock => "lock",
            Device::LockPeriph => "lock_periph",
            Device::Timer => "timer",
        }
    }

    pub fn has_lock(self) -> bool {
        self != Device::Timer
    }

    pub fn is_bus(self) -> bool {
        self != Device::Lock
    }
}

impl fmt::Display for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Device {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lock" => Ok(Device::Lock),
            "lock_periph" | "lock-periph" => Ok(Device::LockPeriph),
            "timer" => Ok(Device::Timer),
            _ => Err(ConfigError::Invalid(format!("unknown device `{s}` (expected lock, lock_periph or timer)"))),
        }
    }
}

/// Everything needed to build a harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Target {
    pub device: Device,
    /// Lock shape; ignored by the timer.
    pub lock: LockConfig,
    /// Bus encoding; ignored by the generic harness.
    pub encoding: Encoding,
    pub fork_point: ForkPoint,
    pub scope: ScopeFilter,
    /// Whether reaching the unlocked state is reported as a crash.
    pub unlock_assertion: bool,
}

impl Target {
    pub fn new(device: Device, lock: LockConfig) -> Self {
        Target {
            device,
            lock,
            encoding: Encoding::default(),
            fork_point: ForkPoint::default(),
            scope: ScopeFilter::default(),
            unlock_assertion: true,
        }
    }

    pub fn lock(lock: LockConfig) -> Self {
        Target::new(Device::Lock, lock)
    }

    pub fn lock_periph(lock: LockConfig, encoding: Encoding) -> Self {
        Target { encoding, ..Target::new(Device::LockPeriph, lock) }
    }

    pub fn timer(encoding: Encoding) -> Self {
        let placeholder = LockConfig::new(1, 1, 0).expect("valid");
        Target { encoding, ..Target::new(Device::Timer, placeholder) }
    }

    pub fn with_fork_point(self, fork_point: ForkPoint) -> Self {
        Target { fork_point, ..self }
    }

    pub fn with_scope(self, scope: ScopeFilter) -> Self {
        Target { scope, ..self }
    }

    pub fn with_unlock_assertion(self, unlock_assertion: bool) -> Self {
        Target { unlock_assertion, ..self }
    }

    pub fn build(&self) -> Box<dyn Harness + Send> {
        match self.device {
            Device::Lock => Box::new(GenericHarness::new(
                LockDut::new(self.lock).with_unlock_assertion(self.unlock_assertion),
                self.fork_point,
                self.scope,
            )),
            Device::LockPeriph => Box::new(BusHarness::new(
                LockPeripheral::new(self.lock).with_unlock_assertion(self.unlock_assertion),
                self.encoding,
                self.fork_point,
                self.scope,
            )),
            Device::Timer => Box::new(BusHarness::new(TimerDevice::new(), self.encoding, self.fork_point, self.scope)),
        }
    }
}
