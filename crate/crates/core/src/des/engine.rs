use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

use rand::Rng;
use rand_distr::{Distribution, Exp};

use super::{SimError, SimOptions, SimStats};
use crate::network::{Mode, NetworkSpec};
use crate::rng::{self, Stream};
use crate::service::ServiceSampler;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Kind {
    Arrival,
    Completion,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    t: f64,
    kind: Kind,
    server: usize,
    seq: u64,
}

impl Ord for Event {
    fn cmp(&self, o: &Self) -> Ordering {
        self.t
            .total_cmp(&o.t)
            .then(self.kind.cmp(&o.kind))
            .then(self.server.cmp(&o.server))
            .then(self.seq.cmp(&o.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

impl PartialEq for Event {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}

impl Eq for Event {}

struct Server {
    ty: usize,
    /// Visit numbers of waiting customers, head in service.
    queue: VecDeque<u64>,
    next_visit: u64,
    next_departure: u64,
    /// Service lengths and routing decisions.
    rng: Stream,
    /// Exogenous inter-arrival times.
    source: Stream,
    probe: Option<usize>,
}

struct Sim<'a> {
    spec: &'a NetworkSpec,
    opts: &'a SimOptions,
    servers: Vec<Server>,
    samplers: Vec<ServiceSampler>,
    exo: Vec<Option<Exp<f64>>>,
    /// Cumulative routing probabilities per type.
    routes: Vec<Vec<(usize, f64)>>,
    heap: BinaryHeap<Reverse<Event>>,
    seq: u64,
    stats: SimStats,
    per_type: Vec<u64>,
    area: Vec<f64>,
    clock: f64,
    next_snapshot: f64,
}

impl Sim<'_> {
    fn schedule(&mut self, t: f64, kind: Kind, server: usize) {
        self.seq += 1;
        self.heap.push(Reverse(Event { t, kind, server, seq: self.seq }));
    }

    fn bin(&self, t: f64) -> usize {
        let bins = self.stats.arrivals.first().map_or(0, Vec::len);
        ((t / self.stats.bin_width) as usize).min(bins.saturating_sub(1))
    }

    /// Moves the clock to `t`, accruing time averages and taking any
    /// snapshots due before it.
    fn advance(&mut self, t: f64) {
        let (warmup, horizon) = (self.spec.warmup, self.spec.horizon);
        while self.next_snapshot <= t.min(horizon) {
            for s in &self.servers {
                let hist = &mut self.stats.queue_hist[s.ty];
                let n = s.queue.len();
                if hist.len() <= n {
                    hist.resize(n + 1, 0);
                }
                hist[n] += 1;
            }
            self.stats.snapshots += 1;
            self.next_snapshot = warmup + self.stats.snapshots as f64 * self.opts.snapshot_every;
        }
        let from = self.clock.max(warmup);
        if t > from {
            for (a, &n) in self.area.iter_mut().zip(&self.per_type) {
                *a += n as f64 * (t - from);
            }
        }
        self.clock = t;
    }

    fn arrive(&mut self, s: usize, t: f64) -> Result<(), SimError> {
        let k = self.bin(t);
        let server = &mut self.servers[s];
        let ty = server.ty;
        server.queue.push_back(server.next_visit);
        server.next_visit += 1;
        let len = server.queue.len();
        if let Some(p) = server.probe {
            if t >= self.spec.warmup {
                self.stats.probe_arrivals[p].push(t);
            }
        }
        self.per_type[ty] += 1;
        if !self.stats.arrivals[ty].is_empty() {
            self.stats.arrivals[ty][k] += 1;
        }
        if len > self.opts.queue_cap {
            return Err(SimError::QueueExplosion {
                ty: ty + 1,
                server: s % self.spec.servers + 1,
                cap: self.opts.queue_cap,
                t,
            });
        }
        if len == 1 {
            self.start_service(s, t);
        }
        Ok(())
    }

    fn start_service(&mut self, s: usize, t: f64) {
        let server = &mut self.servers[s];
        let d = self.samplers[server.ty].sample(&mut server.rng);
        self.schedule(t + d, Kind::Completion, s);
    }

    fn complete(&mut self, s: usize, t: f64) -> Result<(), SimError> {
        let k = self.bin(t);
        let n = self.spec.servers;
        let server = &mut self.servers[s];
        let ty = server.ty;
        let visit = server.queue.pop_front().expect("completion at an empty server");
        if visit != server.next_departure {
            self.stats.fifo_violations += 1;
        }
        server.next_departure = visit + 1;
        let busy = !server.queue.is_empty();
        let u: f64 = server.rng.random();
        let dest = self.routes[ty].iter().find(|(_, c)| u < *c).map(|(j, _)| *j);
        let target = dest.map(|j| {
            let me = s % n;
            if !self.spec.allow_self_routing && j == ty && n > 1 {
                let pick = server.rng.random_range(0..n - 1);
                j * n + if pick >= me { pick + 1 } else { pick }
            } else {
                j * n + server.rng.random_range(0..n)
            }
        });
        self.per_type[ty] -= 1;
        if !self.stats.departures[ty].is_empty() {
            self.stats.departures[ty][k] += 1;
        }
        if busy {
            self.start_service(s, t);
        }
        match (dest, target) {
            (Some(j), Some(target)) => {
                self.stats.routed[ty][j] += 1;
                self.arrive(target, t)?;
            }
            _ => {
                self.stats.routed[ty][self.spec.types()] += 1;
                self.stats.exits += 1;
                self.stats.in_system -= 1;
            }
        }
        Ok(())
    }
}

/// Simulates `spec` to its horizon. Server `s` (type-major index) draws
/// service and routing from stream `2s` and exogenous arrivals from
/// stream `2s + 1` of `seed`.
pub fn run(spec: &NetworkSpec, seed: u64, opts: &SimOptions) -> Result<SimStats, SimError> {
    spec.validate()?;
    let (m, n) = (spec.types(), spec.servers);
    if !(opts.bin_width > 0.0 && opts.snapshot_every > 0.0) {
        return Err(SimError::Options("bin_width and snapshot_every must be positive".into()));
    }
    if let Some(p) = opts.probes.iter().find(|p| p.ty >= m || p.server >= n) {
        return Err(SimError::Probe { ty: p.ty + 1, server: p.server + 1 });
    }
    let samplers = spec
        .services
        .iter()
        .enumerate()
        .map(|(index, d)| d.sampler().map_err(|source| SimError::Service { index, source }))
        .collect::<Result<Vec<_>, _>>()?;
    let exo = spec
        .exogenous
        .iter()
        .map(|&v| if spec.is_closed() || v == 0.0 { None } else { Exp::new(v).ok() })
        .collect();
    let routes = (0..m)
        .map(|i| {
            let mut acc = 0.0;
            spec.routing
                .row(i)
                .map(|(j, p)| {
                    acc += p;
                    (j, acc)
                })
                .collect()
        })
        .collect();
    let servers = (0..m * n)
        .map(|s| Server {
            ty: s / n,
            queue: VecDeque::new(),
            next_visit: 0,
            next_departure: 0,
            rng: rng::stream(seed, 2 * s as u64),
            source: rng::stream(seed, 2 * s as u64 + 1),
            probe: opts.probes.iter().position(|p| p.ty * n + p.server == s),
        })
        .collect();
    let mut sim = Sim {
        spec,
        opts,
        servers,
        samplers,
        exo,
        routes,
        heap: BinaryHeap::new(),
        seq: 0,
        stats: SimStats::new(seed, n, m, spec.horizon, spec.warmup, opts.bin_width, opts.probes.clone()),
        per_type: vec![0; m],
        area: vec![0.0; m],
        clock: 0.0,
        next_snapshot: spec.warmup,
    };

    let population = match &spec.mode {
        Mode::Open => None,
        Mode::Closed { customers, placement } => {
            let counts = placement.clone().unwrap_or_else(|| {
                (0..m * n).map(|s| customers / (m * n) + usize::from(s < customers % (m * n))).collect()
            });
            for (s, &c) in counts.iter().enumerate() {
                for _ in 0..c {
                    let server = &mut sim.servers[s];
                    server.queue.push_back(server.next_visit);
                    server.next_visit += 1;
                    sim.per_type[s / n] += 1;
                }
                if c > 0 {
                    sim.start_service(s, 0.0);
                }
            }
            sim.stats.initial = *customers as u64;
            sim.stats.in_system = *customers as u64;
            Some(*customers as u64)
        }
    };
    for s in 0..m * n {
        if let Some(e) = sim.exo[s / n] {
            let t = e.sample(&mut sim.servers[s].source);
            sim.schedule(t, Kind::Arrival, s);
        }
    }

    while let Some(Reverse(ev)) = sim.heap.pop() {
        if ev.t > spec.horizon {
            break;
        }
        sim.advance(ev.t);
        match ev.kind {
            Kind::Arrival => {
                sim.stats.exogenous += 1;
                sim.stats.in_system += 1;
                sim.arrive(ev.server, ev.t)?;
                let e = sim.exo[ev.server / n].expect("exogenous source");
                let next = ev.t + e.sample(&mut sim.servers[ev.server].source);
                sim.schedule(next, Kind::Arrival, ev.server);
            }
            Kind::Completion => sim.complete(ev.server, ev.t)?,
        }
        sim.stats.events += 1;
        if let Some(k) = population {
            let inside: u64 = sim.per_type.iter().sum();
            if inside != k || sim.stats.in_system != k {
                sim.stats.conservation_violations += 1;
            }
        }
    }
    sim.advance(spec.horizon);
    let span = spec.horizon - spec.warmup;
    if span > 0.0 {
        sim.stats.mean_queue = sim.area.iter().map(|a| a / (span * n as f64)).collect();
        sim.stats.mean_in_system = sim.area.iter().sum::<f64>() / span;
    }
    Ok(sim.stats)
}
