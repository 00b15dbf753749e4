//! Deterministic discrete-event link between two endpoints.
//!
//! Everything runs on virtual microseconds. Randomness comes from
//! [`SplitMix64`], so a seed and a send sequence fully determine the delivery
//! log on every platform.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinkError {
    #[error("link-closed")]
    Closed,
    #[error("send at {at_us} us is before the clock ({now_us} us)")]
    Past { at_us: u64, now_us: u64 },
    #[error("invalid link config: {0}")]
    Config(String),
}

/// SplitMix64 (Steele, Lea and Flood), the seeding generator of xoshiro.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[-half_width, half_width]`.
    pub fn next_symmetric(&mut self, half_width: u64) -> i64 {
        let span = 2 * half_width + 1;
        (self.next_u64() % span) as i64 - half_width as i64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub one_way_delay_us: u64,
    /// Half-width of the uniform jitter added to each packet.
    pub jitter_us: u64,
    pub loss_prob: f64,
    pub allow_reorder: bool,
    pub seed: u64,
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::ideal()
    }
}

impl LinkModel {
    /// Zero delay, zero jitter, no loss.
    pub fn ideal() -> Self {
        LinkModel {
            one_way_delay_us: 0,
            jitter_us: 0,
            loss_prob: 0.0,
            allow_reorder: false,
            seed: 0,
        }
    }

    pub fn with_delay_us(mut self, delay_us: u64) -> Self {
        self.one_way_delay_us = delay_us;
        self
    }

    pub fn validate(&self) -> Result<(), LinkError> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(LinkError::Config(format!(
                "loss {} outside [0, 1]",
                self.loss_prob
            )));
        }
        Ok(())
    }

    /// Parses `key = value` lines (`delay_us`, `jitter_us`, `loss`,
    /// `reorder`, `seed`). Blank lines and `#` comments are ignored; missing
    /// keys keep their ideal-link defaults.
    pub fn parse_config(text: &str) -> Result<Self, LinkError> {
        let mut model = LinkModel::ideal();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                LinkError::Config(format!("line {}: expected key = value", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad =
                || LinkError::Config(format!("line {}: bad value {value:?} for {key}", n + 1));
            match key {
                "delay_us" => model.one_way_delay_us = value.parse().map_err(|_| bad())?,
                "jitter_us" => model.jitter_us = value.parse().map_err(|_| bad())?,
                "loss" => model.loss_prob = value.parse().map_err(|_| bad())?,
                "reorder" => {
                    model.allow_reorder = match value {
                        "true" | "1" | "yes" => true,
                        "false" | "0" | "no" => false,
                        _ => return Err(bad()),
                    }
                }
                "seed" => model.seed = value.parse().map_err(|_| bad())?,
                other => {
                    return Err(LinkError::Config(format!(
                        "line {}: unknown key {other:?}",
                        n + 1
                    )))
                }
            }
        }
        model.validate()?;
        Ok(model)
    }

    pub fn to_config(&self) -> String {
        format!(
            "delay_us = {}\njitter_us = {}\nloss = {}\nreorder = {}\nseed = {}\n",
            self.one_way_delay_us, self.jitter_us, self.loss_prob, self.allow_reorder, self.seed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    A,
    B,
}

impl Endpoint {
    pub fn peer(self) -> Endpoint {
        match self {
            Endpoint::A => Endpoint::B,
            Endpoint::B => Endpoint::A,
        }
    }

    fn slot(self) -> usize {
        match self {
            Endpoint::A => 0,
            Endpoint::B => 1,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Endpoint::A => "A",
            Endpoint::B => "B",
        })
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "A" | "a" => Ok(Endpoint::A),
            "B" | "b" => Ok(Endpoint::B),
            other => Err(format!("unknown endpoint {other:?}")),
        }
    }
}

struct Pending<E> {
    at_us: u64,
    order: u64,
    event: E,
}

impl<E> PartialEq for Pending<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at_us, self.order) == (other.at_us, other.order)
    }
}

impl<E> Eq for Pending<E> {}

impl<E> PartialOrd for Pending<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Pending<E> {
    // reversed: BinaryHeap is a max-heap and we pop the earliest event
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at_us, other.order).cmp(&(self.at_us, self.order))
    }
}

/// Virtual clock with a time-ordered event queue. Events sharing a
/// timestamp come out in insertion order.
pub struct SimClock<E> {
    now_us: u64,
    inserted: u64,
    pending: BinaryHeap<Pending<E>>,
}

impl<E> Default for SimClock<E> {
    fn default() -> Self {
        SimClock {
            now_us: 0,
            inserted: 0,
            pending: BinaryHeap::new(),
        }
    }
}

impl<E> SimClock<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Schedules `event`; times before `now_us` are clamped to `now_us`.
    pub fn schedule(&mut self, at_us: u64, event: E) {
        let order = self.inserted;
        self.inserted += 1;
        self.pending.push(Pending {
            at_us: at_us.max(self.now_us),
            order,
            event,
        });
    }

    /// Pops every event due at or before `t_us` and advances the clock to
    /// `t_us`. The clock never moves backwards.
    pub fn run_until(&mut self, t_us: u64) -> Vec<(u64, E)> {
        let mut due = Vec::new();
        while self.pending.peek().is_some_and(|p| p.at_us <= t_us) {
            let p = self.pending.pop().expect("peeked");
            due.push((p.at_us, p.event));
        }
        self.now_us = self.now_us.max(t_us);
        due
    }

    pub fn next_event_us(&self) -> Option<u64> {
        self.pending.peek().map(|p| p.at_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeliveryStatus {
    Delivered,
    Dropped,
}

impl fmt::Display for DeliveryStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DeliveryStatus::Delivered => "delivered",
            DeliveryStatus::Dropped => "dropped",
        })
    }
}

/// One line of the delivery log. Drops are logged at their send time,
/// deliveries at their arrival time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliveryRecord {
    pub t_us: u64,
    pub from: Endpoint,
    pub size: usize,
    pub status: DeliveryStatus,
}

impl fmt::Display for DeliveryRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}, {}->{}, {}, {}",
            self.t_us,
            self.from,
            self.from.peer(),
            self.size,
            self.status
        )
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DirectionStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl DirectionStats {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub at_us: u64,
    pub to: Endpoint,
    pub bytes: Vec<u8>,
}

/// Simulated bidirectional link. Each direction samples its own delay and
/// loss from the shared generator in send order.
pub struct SimLink {
    model: LinkModel,
    rng: SplitMix64,
    clock: SimClock<(Endpoint, Vec<u8>)>,
    last_scheduled: [u64; 2],
    stats: [DirectionStats; 2],
    log: Vec<DeliveryRecord>,
    partitioned: bool,
    closed: bool,
}

impl SimLink {
    pub fn new(model: LinkModel) -> Result<Self, LinkError> {
        model.validate()?;
        Ok(SimLink {
            rng: SplitMix64::new(model.seed),
            model,
            clock: SimClock::new(),
            last_scheduled: [0; 2],
            stats: [DirectionStats::default(); 2],
            log: Vec::new(),
            partitioned: false,
            closed: false,
        })
    }

    pub fn model(&self) -> &LinkModel {
        &self.model
    }

    pub fn now_us(&self) -> u64 {
        self.clock.now_us()
    }

    /// While partitioned every send is dropped; packets already in flight
    /// still arrive.
    pub fn set_partitioned(&mut self, partitioned: bool) {
        self.partitioned = partitioned;
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn stats(&self, from: Endpoint) -> DirectionStats {
        self.stats[from.slot()]
    }

    pub fn log(&self) -> &[DeliveryRecord] {
        &self.log
    }

    pub fn send(&mut self, from: Endpoint, bytes: Vec<u8>, at_us: u64) -> Result<(), LinkError> {
        if self.closed {
            return Err(LinkError::Closed);
        }
        if at_us < self.clock.now_us() {
            return Err(LinkError::Past {
                at_us,
                now_us: self.clock.now_us(),
            });
        }
        let dir = from.slot();
        self.stats[dir].sent += 1;
        let lost = self.partitioned
            || (self.model.loss_prob > 0.0 && self.rng.next_f64() < self.model.loss_prob);
        if lost {
            self.stats[dir].dropped += 1;
            self.log.push(DeliveryRecord {
                t_us: at_us,
                from,
                size: bytes.len(),
                status: DeliveryStatus::Dropped,
            });
            return Ok(());
        }
        let mut delay = self.model.one_way_delay_us as i64;
        if self.model.jitter_us > 0 {
            delay += self.rng.next_symmetric(self.model.jitter_us);
        }
        let mut deliver_at = at_us + delay.max(0) as u64;
        if !self.model.allow_reorder {
            deliver_at = deliver_at.max(self.last_scheduled[dir]);
        }
        self.last_scheduled[dir] = self.last_scheduled[dir].max(deliver_at);
        self.clock.schedule(deliver_at, (from.peer(), bytes));
        Ok(())
    }

    /// Delivers every packet due at or before `t_us`, in arrival order.
    pub fn run_until(&mut self, t_us: u64) -> Vec<Delivery> {
        self.clock
            .run_until(t_us)
            .into_iter()
            .map(|(at_us, (to, bytes))| {
                let from = to.peer();
                self.stats[from.slot()].delivered += 1;
                self.log.push(DeliveryRecord {
                    t_us: at_us,
                    from,
                    size: bytes.len(),
                    status: DeliveryStatus::Delivered,
                });
                Delivery { at_us, to, bytes }
            })
            .collect()
    }

    /// Delivers everything still in flight.
    pub fn flush(&mut self) -> Vec<Delivery> {
        match self.clock_last_event() {
            Some(t) => self.run_until(t),
            None => Vec::new(),
        }
    }

    fn clock_last_event(&self) -> Option<u64> {
        self.clock.pending.iter().map(|p| p.at_us).max()
    }
}
