//! Simulator invariants: determinism, per-pair FIFO, exactly-once delivery
//! without loss and a monotone clock.

use proptest::prelude::*;

use momex_core::netsim::{
    addr, Context, Envelope, Latency, Node, SimConfig, Simulation, TimerId, TraceKind,
};

/// Echoes every payload back once and records what it received.
#[derive(Default)]
struct Recorder {
    got: Vec<(u64, Vec<u8>)>,
    echo: bool,
}

impl Node for Recorder {
    fn on_message(&mut self, ctx: &mut Context<'_>, env: Envelope) {
        self.got.push((ctx.now(), env.payload.clone()));
        if self.echo && env.payload.first() != Some(&b'!') {
            let mut back = b"!".to_vec();
            back.extend_from_slice(&env.payload);
            ctx.send(&env.src, back);
        }
    }

    fn on_timer(&mut self, ctx: &mut Context<'_>, _timer: TimerId, tag: &str) {
        self.got.push((ctx.now(), tag.as_bytes().to_vec()));
    }
}

fn latency() -> impl Strategy<Value = Latency> {
    prop_oneof![
        (0u64..50).prop_map(Latency::Fixed),
        (0u64..30, 0u64..30).prop_map(|(a, b)| Latency::Uniform {
            low: a,
            high: a + b
        }),
    ]
}

fn run(config: SimConfig, sends: &[(u8, u8)]) -> String {
    let mut sim = Simulation::new(config).unwrap();
    for n in ["a", "b", "c"] {
        sim.register_node(
            addr(n),
            Box::new(Recorder {
                echo: true,
                ..Default::default()
            }),
        )
        .unwrap();
    }
    let names = ["a", "b", "c"];
    for (i, &(s, d)) in sends.iter().enumerate() {
        let (s, d) = (addr(names[s as usize % 3]), addr(names[d as usize % 3]));
        sim.send(&s, &d, format!("m{i}").into_bytes());
    }
    sim.run_until_idle(1_000_000).unwrap().to_text()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn same_config_same_trace(seed in any::<u64>(), lat in latency(), loss in 0.0f64..0.5,
                              sends in proptest::collection::vec((0u8..3, 0u8..3), 0..40)) {
        let c = SimConfig { seed, latency: lat, loss_probability: loss };
        prop_assert_eq!(run(c, &sends), run(c, &sends));
    }

    #[test]
    fn fixed_latency_is_fifo_per_pair(seed in any::<u64>(), ms in 0u64..50, n in 1usize..60) {
        let mut sim = Simulation::new(SimConfig { seed, latency: Latency::Fixed(ms), loss_probability: 0.0 }).unwrap();
        let dst = addr("d");
        sim.register_node(dst.clone(), Box::new(Recorder::default())).unwrap();
        let src = sim.external().clone();
        for i in 0..n {
            sim.send(&src, &dst, (i as u32).to_be_bytes().to_vec());
        }
        sim.run_until_idle(u64::MAX).unwrap();
        let got: Vec<u32> = sim.node::<Recorder>(&dst).unwrap().got.iter()
            .map(|(_, p)| u32::from_be_bytes(p[..4].try_into().unwrap())).collect();
        prop_assert_eq!(got, (0..n as u32).collect::<Vec<_>>());
    }

    #[test]
    fn lossless_delivers_exactly_once(seed in any::<u64>(), lat in latency(),
                                      sends in proptest::collection::vec((0u8..3, 0u8..3), 0..40)) {
        let trace = {
            let mut sim = Simulation::new(SimConfig { seed, latency: lat, loss_probability: 0.0 }).unwrap();
            for n in ["a", "b", "c"] {
                sim.register_node(addr(n), Box::new(Recorder::default())).unwrap();
            }
            let names = ["a", "b", "c"];
            for (i, &(s, d)) in sends.iter().enumerate() {
                sim.send(&addr(names[s as usize]), &addr(names[d as usize]), format!("m{i}").into_bytes());
            }
            sim.run_until_idle(u64::MAX).unwrap()
        };
        prop_assert_eq!(trace.count(TraceKind::Send), sends.len());
        prop_assert_eq!(trace.count(TraceKind::Deliver), sends.len());
        prop_assert_eq!(trace.count(TraceKind::Drop), 0);
    }

    #[test]
    fn clock_never_goes_back(seed in any::<u64>(), lat in latency(), loss in 0.0f64..0.3,
                             sends in proptest::collection::vec((0u8..3, 0u8..3), 0..40),
                             timers in proptest::collection::vec(0u64..500, 0..10)) {
        let mut sim = Simulation::new(SimConfig { seed, latency: lat, loss_probability: loss }).unwrap();
        for n in ["a", "b", "c"] {
            sim.register_node(addr(n), Box::new(Recorder { echo: true, ..Default::default() })).unwrap();
        }
        for (i, t) in timers.iter().enumerate() {
            sim.set_timer(&addr("a"), *t, &format!("t{i}")).unwrap();
        }
        let names = ["a", "b", "c"];
        for (i, &(s, d)) in sends.iter().enumerate() {
            sim.send(&addr(names[s as usize]), &addr(names[d as usize]), format!("m{i}").into_bytes());
        }
        let trace = sim.run_until_idle(u64::MAX).unwrap();
        let text = trace.to_text();
        let times: Vec<u64> = text.lines().map(|l| l.split(' ').next().unwrap().parse().unwrap()).collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }
}

#[test]
fn equal_timers_fire_in_creation_order() {
    let mut sim = Simulation::new(SimConfig::default()).unwrap();
    let a = addr("a");
    sim.register_node(a.clone(), Box::new(Recorder::default()))
        .unwrap();
    for tag in ["first", "second", "third"] {
        sim.set_timer(&a, 5, tag).unwrap();
    }
    sim.run_until_idle(10).unwrap();
    let tags: Vec<_> = sim
        .node::<Recorder>(&a)
        .unwrap()
        .got
        .iter()
        .map(|(_, t)| t.clone())
        .collect();
    assert_eq!(
        tags,
        [b"first".to_vec(), b"second".to_vec(), b"third".to_vec()]
    );
}
