//! In-process publish/subscribe bus driven by a deterministic event queue.
//!
//! The bus owns the virtual clock, the scheduled-event queue, topic
//! subscriptions, per-topic message history (for frequency estimation), and
//! the run log. Events due at the same instant are processed in insertion
//! order, which makes every run a pure function of scenario plus seed.
//!
//! Subscribers consume deliveries immediately at their delivery instant, so
//! the bus itself never accumulates a backlog; bounded queues appear where
//! nodes buffer messages themselves (e.g. for sensor pairing).

use crate::lifecycle::AdaptationCommand;
use crate::log::{detail, fixed, EventLog, EventRecord};
use crate::pipeline::frames::Payload;
use crate::time::VirtualTime;
use serde_json::Value;
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

/// A message as seen by subscribers.
#[derive(Debug, Clone)]
pub struct Message {
    pub publisher: String,
    pub topic: String,
    pub seq: u64,
    /// Acquisition timestamp of the underlying data (≤ publish time).
    pub stamp: VirtualTime,
    pub payload: Payload,
}

/// Internal one-shot control operations staged by the simulation itself.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlOp {
    /// Second half of a restart: configure + activate the target node.
    RestartResume { node: String },
    /// End of a redeploy: recreate the target node from defaults.
    RedeployComplete { node: String },
    /// Periodic diagnostics sampling tick.
    MonitorSample,
}

/// Everything that can be scheduled on the event queue.
#[derive(Debug, Clone)]
pub enum EventKind {
    /// A node-owned timer. `epoch` ties the timer chain to one activation;
    /// fires from a previous activation are dropped.
    TimerFire { node: String, epoch: u64 },
    MessageDelivery { subscriber: String, message: Message },
    /// Index into the scenario's injection list.
    Injection { index: usize },
    AdaptationDelivery { command: AdaptationCommand },
    Control(ControlOp),
}

#[derive(Debug)]
pub struct Event {
    pub due: VirtualTime,
    pub kind: EventKind,
}

struct QueuedEvent {
    due: VirtualTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for QueuedEvent {
    fn eq(&self, other: &Self) -> bool {
        self.due == other.due && self.seq == other.seq
    }
}

impl Eq for QueuedEvent {}

impl PartialOrd for QueuedEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for QueuedEvent {
    /// Reversed so the std max-heap pops the earliest (due, seq) first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.due, other.seq).cmp(&(self.due, self.seq))
    }
}

#[derive(Debug, Clone)]
struct Subscription {
    subscriber: String,
}

/// Deterministic event-driven message bus.
pub struct Bus {
    clock: VirtualTime,
    next_event_seq: u64,
    queue: BinaryHeap<QueuedEvent>,
    /// topic -> subscriptions in creation order.
    subscriptions: BTreeMap<String, Vec<Subscription>>,
    /// (publisher, topic) -> last assigned message seq. Owned by the bus so
    /// sequence numbers keep increasing across node redeploys.
    seq_counters: BTreeMap<(String, String), u64>,
    /// topic -> delivery instants of every accepted message, in order.
    history: BTreeMap<String, Vec<VirtualTime>>,
    /// topic -> fixed delivery latency in milliseconds (default 0).
    latency_ms: BTreeMap<String, u64>,
    pub log: EventLog,
}

impl Bus {
    pub fn new() -> Self {
        Bus {
            clock: VirtualTime::ZERO,
            next_event_seq: 0,
            queue: BinaryHeap::new(),
            subscriptions: BTreeMap::new(),
            seq_counters: BTreeMap::new(),
            history: BTreeMap::new(),
            latency_ms: BTreeMap::new(),
            log: EventLog::new(),
        }
    }

    pub fn now(&self) -> VirtualTime {
        self.clock
    }

    pub fn set_topic_latency(&mut self, topic: &str, millis: u64) {
        self.latency_ms.insert(topic.to_string(), millis);
    }

    pub fn topic_latency_ms(&self, topic: &str) -> u64 {
        self.latency_ms.get(topic).copied().unwrap_or(0)
    }

    /// Schedules `kind` to run at `due` (must not be in the past).
    pub fn schedule(&mut self, due: VirtualTime, kind: EventKind) {
        debug_assert!(due >= self.clock, "cannot schedule into the past");
        let seq = self.next_event_seq;
        self.next_event_seq += 1;
        self.queue.push(QueuedEvent { due, seq, kind });
    }

    pub fn schedule_in_millis(&mut self, millis: u64, kind: EventKind) {
        self.schedule(self.clock.plus_millis(millis), kind);
    }

    /// Subscribes `subscriber` to `topic`. Idempotent: re-subscribing an
    /// already-subscribed node changes nothing and logs nothing.
    pub fn subscribe(&mut self, topic: &str, subscriber: &str) {
        if self.is_subscribed(topic, subscriber) {
            return;
        }
        self.subscriptions
            .entry(topic.to_string())
            .or_default()
            .push(Subscription { subscriber: subscriber.to_string() });
        self.log_event("subscribe", subscriber, Some(topic), None, detail(&[]));
    }

    /// Removes `subscriber`'s subscription to `topic`; false if absent.
    pub fn unsubscribe(&mut self, topic: &str, subscriber: &str) -> bool {
        let Some(subs) = self.subscriptions.get_mut(topic) else {
            return false;
        };
        let before = subs.len();
        subs.retain(|s| s.subscriber != subscriber);
        let removed = subs.len() < before;
        if removed {
            self.log_event("unsubscribe", subscriber, Some(topic), None, detail(&[]));
        }
        removed
    }

    pub fn is_subscribed(&self, topic: &str, subscriber: &str) -> bool {
        self.subscriptions
            .get(topic)
            .map(|subs| subs.iter().any(|s| s.subscriber == subscriber))
            .unwrap_or(false)
    }

    /// Drops every subscription held by `subscriber` (used on node teardown).
    pub fn unsubscribe_all(&mut self, subscriber: &str) {
        let topics: Vec<String> = self
            .subscriptions
            .iter()
            .filter(|(_, subs)| subs.iter().any(|s| s.subscriber == subscriber))
            .map(|(topic, _)| topic.clone())
            .collect();
        for topic in topics {
            self.unsubscribe(&topic, subscriber);
        }
    }

    /// Publishes a message. `publisher_active` reflects the publisher's
    /// lifecycle gate: inactive publishers get their message dropped and the
    /// drop logged. Returns the assigned seq for accepted messages.
    ///
    /// `extra` is appended to the publish log record (already fixed-precision
    /// formatted by the caller where it contains floats).
    pub fn publish(
        &mut self,
        publisher: &str,
        publisher_active: bool,
        topic: &str,
        stamp: VirtualTime,
        payload: Payload,
        extra: &[(&str, Value)],
    ) -> Option<u64> {
        if !publisher_active {
            self.log_event(
                "dropped_publish",
                publisher,
                Some(topic),
                None,
                detail(&[("reason", Value::String("inactive_publisher".into()))]),
            );
            return None;
        }
        let key = (publisher.to_string(), topic.to_string());
        let seq = {
            let counter = self.seq_counters.entry(key).or_insert(0);
            *counter += 1;
            *counter
        };
        let latency = self.topic_latency_ms(topic);
        let delivery_due = self.clock.plus_millis(latency);
        self.history.entry(topic.to_string()).or_default().push(delivery_due);

        let mut fields: Vec<(&str, Value)> = vec![("stamp", Value::String(stamp.to_string()))];
        fields.extend_from_slice(extra);
        self.log_event("publish", publisher, Some(topic), Some(seq), detail(&fields));

        let message = Message {
            publisher: publisher.to_string(),
            topic: topic.to_string(),
            seq,
            stamp,
            payload,
        };
        let receivers: Vec<String> = self
            .subscriptions
            .get(topic)
            .map(|subs| subs.iter().map(|s| s.subscriber.clone()).collect())
            .unwrap_or_default();
        for subscriber in receivers {
            self.schedule(
                delivery_due,
                EventKind::MessageDelivery { subscriber, message: message.clone() },
            );
        }
        Some(seq)
    }

    /// Messages whose delivery instant falls in `(now − window, now]`,
    /// divided by the window length. Window must be positive.
    pub fn estimate_frequency(&self, topic: &str, window_secs: f64, now: VirtualTime) -> f64 {
        let window_ms = VirtualTime::from_secs_f64(window_secs).millis();
        assert!(window_ms > 0, "frequency window must be positive");
        let lower = now.millis().saturating_sub(window_ms);
        let count = self
            .history
            .get(topic)
            .map(|ts| {
                ts.iter()
                    .filter(|t| {
                        let ms = t.millis();
                        (ms > lower || (lower == 0 && now.millis() < window_ms && ms == 0))
                            && ms <= now.millis()
                    })
                    .count()
            })
            .unwrap_or(0);
        count as f64 / window_secs
    }

    /// All delivery instants recorded for `topic`, in order.
    pub fn topic_history(&self, topic: &str) -> &[VirtualTime] {
        self.history.get(topic).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Pops and runs every event due up to and including `t_end`, advancing
    /// the clock to each event's due time and finally to `t_end` itself.
    pub fn run_until<F: FnMut(&mut Bus, Event)>(&mut self, t_end: VirtualTime, mut handler: F) {
        while let Some(head) = self.queue.peek() {
            if head.due > t_end {
                break;
            }
            let queued = self.queue.pop().expect("peeked event exists");
            self.clock = queued.due;
            handler(self, Event { due: queued.due, kind: queued.kind });
        }
        self.clock = t_end;
    }

    /// Pops the next event if it is due at or before `t_end`, advancing the
    /// clock to its due time. The simulator's dispatch loop uses this
    /// instead of `run_until` so it keeps `&mut` access to its own state
    /// while handling each event.
    pub fn pop_due(&mut self, t_end: VirtualTime) -> Option<Event> {
        match self.queue.peek() {
            Some(head) if head.due <= t_end => {
                let queued = self.queue.pop().expect("peeked event exists");
                self.clock = queued.due;
                Some(Event { due: queued.due, kind: queued.kind })
            }
            _ => None,
        }
    }

    /// Moves the clock forward to `t` (typically the run end) without
    /// processing anything.
    pub fn advance_to(&mut self, t: VirtualTime) {
        debug_assert!(t >= self.clock, "clock cannot move backwards");
        self.clock = t;
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn log_event(
        &mut self,
        kind: &str,
        node: &str,
        topic: Option<&str>,
        seq: Option<u64>,
        detail: Value,
    ) {
        self.log.push(EventRecord {
            t: self.clock,
            kind: kind.to_string(),
            node: node.to_string(),
            topic: topic.map(String::from),
            seq,
            detail,
        });
    }

    /// Logs a message delivery (called by the dispatcher when it hands a
    /// message to a subscriber).
    pub fn log_delivery(&mut self, subscriber: &str, message: &Message) {
        self.log.push(EventRecord {
            t: self.clock,
            kind: "delivery".to_string(),
            node: subscriber.to_string(),
            topic: Some(message.topic.clone()),
            seq: Some(message.seq),
            detail: detail(&[
                ("publisher", Value::String(message.publisher.clone())),
                ("stamp", Value::String(message.stamp.to_string())),
            ]),
        });
    }
}

impl Default for Bus {
    fn default() -> Self {
        Self::new()
    }
}

/// Helper for logging float values in publish extras.
pub fn extra_f64(value: f64) -> Value {
    fixed(value)
}
