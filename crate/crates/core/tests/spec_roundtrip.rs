//! Printing a parsed spec gives text that parses back to the same spec, and
//! printing is a fixed point.

use proptest::prelude::*;
use torus_fabric::dal::{parse_app_spec, AppSpec};
use torus_fabric::faultinject::{parse_fault_spec, FaultSpec};

const FAULTS: &[&str] = &[
    "kind=link_kill where=link(0,+x) when=at 50000",
    "kind=link_kill where=link(7,-z) when=periodic 0,100000",
    "kind=link_drop where=link(3,-y) when=window 1000..9000 prob=0.1 stream=7",
    "kind=link_drop where=link(3,-y) when=at 0 prob=1",
    "kind=link_drop where=link(1,+x) when=at 0 prob=0",
    "kind=link_corrupt where=link(2,+z) when=window 0..0 prob=0.5",
    "kind=link_corrupt where=link(5,-x) when=at 123 prob=0.001 stream=18446744073709551615",
    "kind=link_degrade where=link(1,+z) when=at 0 factor=4",
    "kind=link_degrade where=link(1,+z) when=periodic 10,20 factor=1",
    "kind=tile_kill_host where=tile(5) when=at 20000",
    "kind=tile_kill_dnp where=tile(0) when=at 0",
    "kind=tile_kill_dnp where=tile(31) when=periodic 5,5",
    "kind=critical_event where=tile(2) when=periodic 0,100000 code=17",
    "kind=critical_event where=tile(2) when=at 9 code=65535",
    "seed=42\nkind=link_kill where=link(0,+x) when=at 1",
    "seed=0",
    "",
    "# only a comment\n\n",
    "seed=9 # trailing\nkind=link_drop   where=link(4,+y)   when=window 3..4   prob=0.25\n",
    "kind=tile_kill_host where=tile(1) when=at 5\nkind=tile_kill_host where=tile(1) when=at 5",
    "kind=link_kill where=link(0,+x) when=at 10\nkind=link_degrade where=link(0,+x) when=at 20 factor=3\nkind=link_drop where=link(0,+x) when=window 30..40 prob=0.9",
    "seed=18446744073709551615\nkind=critical_event where=tile(3) when=at 0 code=0",
    "kind=link_corrupt where=link(6,-y) when=window 100..200 prob=0.3333333333333333",
    "kind=link_kill where=link(12,-x) when=periodic 1000,1",
    "kind=link_drop where=link(0,-z) when=at 7 prob=0.5 stream=0\nkind=link_drop where=link(0,-z) when=at 7 prob=0.5 stream=1",
];

const APPS: &[&str] = &[
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k",
    "app name=p critical=true\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k capacity=0",
    "app name=p spares=2\nprocess app=p id=s behavior=source(count=3,start=10,step=5) weight=9\nprocess app=p id=f behavior=identity\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=f capacity=1\nchannel app=p from=f to=k capacity=7",
    "app name=a\nprocess app=a id=s behavior=source(count=10)\nprocess app=a id=m behavior=affine(mul=3,add=1)\nprocess app=a id=k behavior=sink\nchannel app=a from=s to=m\nchannel app=a from=m to=k",
    "app name=a\nprocess app=a id=s behavior=source(count=10)\nprocess app=a id=m behavior=affine(mul=2)\nprocess app=a id=k behavior=sink\nchannel app=a from=s to=m\nchannel app=a from=m to=k",
    "app name=a\nprocess app=a id=s behavior=source(count=10)\nprocess app=a id=l behavior=lookup(table=4:0:9)\nprocess app=a id=k behavior=sink\nchannel app=a from=s to=l\nchannel app=a from=l to=k",
    "app name=d\nprocess app=d id=s behavior=source(count=4)\nprocess app=d id=f behavior=fork\nprocess app=d id=m behavior=merge\nprocess app=d id=k behavior=sink\nchannel app=d from=s to=f\nchannel app=d from=f to=m\nchannel app=d from=f to=m capacity=2\nchannel app=d from=m to=k",
    "app name=n\nprocess app=n id=p0 behavior=dpsnn(part=0,of=2,neurons=100,synapses=10,ms=5,seed=1)\nprocess app=n id=p1 behavior=dpsnn(part=1,of=2,neurons=100,synapses=10,ms=5,seed=1)\nprocess app=n id=r behavior=raster_sink\nchannel app=n from=p0 to=p1\nchannel app=n from=p1 to=p0\nchannel app=n from=p0 to=r\nchannel app=n from=p1 to=r",
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k\nstate name=idle apps=\nstate name=run apps=p\ninitial state=idle\ntransition from=idle event=start(p) to=run\ntransition from=run event=stop(p) to=idle\ntrigger at=100 event=start(p)",
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k\ntrigger at=10 event=pause(p)\ntrigger at=20 event=resume(p)",
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k\nstate name=A apps=p\nstate name=B apps=\ninitial state=A\ntransition from=A event=fail(p) to=B",
    "app name=x.y-z_1\nprocess app=x.y-z_1 id=s.1 behavior=source(count=1)\nprocess app=x.y-z_1 id=k-2 behavior=sink\nchannel app=x.y-z_1 from=s.1 to=k-2",
    "# two apps\napp name=a\napp name=b\nprocess app=a id=s behavior=source(count=2)\nprocess app=a id=k behavior=sink\nprocess app=b id=s behavior=source(count=2)\nprocess app=b id=k behavior=sink\nchannel app=a from=s to=k\nchannel app=b from=s to=k",
    "app name=a\napp name=b\nprocess app=a id=s behavior=source(count=2)\nprocess app=a id=k behavior=sink\nprocess app=b id=s behavior=source(count=2)\nprocess app=b id=k behavior=sink\nchannel app=a from=s to=k\nchannel app=b from=s to=k\nstate name=A apps=a\nstate name=AB apps=a,b\ninitial state=A\ntransition from=A event=start(b) to=AB\ntransition from=AB event=stop(b) to=A\ntrigger at=5 event=start(b)\ntrigger at=50 event=stop(b)",
    "app name=w\nprocess app=w id=s behavior=source(count=0)\nprocess app=w id=k behavior=sink\nchannel app=w from=s to=k",
    "app name=w\nprocess app=w id=s behavior=source(count=18446744073709551615)\nprocess app=w id=k behavior=sink weight=18446744073709551615\nchannel app=w from=s to=k",
    "app name=c critical=false spares=0\nprocess app=c id=s behavior=source(count=5)\nprocess app=c id=f behavior=identity\nprocess app=c id=g behavior=identity\nprocess app=c id=k behavior=sink\nchannel app=c from=s to=f\nchannel app=c from=f to=g\nchannel app=c from=g to=k",
    "app name=m\nprocess app=m id=a behavior=source(count=5)\nprocess app=m id=b behavior=source(count=5,start=100)\nprocess app=m id=c behavior=source(count=5,step=0)\nprocess app=m id=j behavior=merge\nprocess app=m id=k behavior=sink\nchannel app=m from=a to=j\nchannel app=m from=b to=j\nchannel app=m from=c to=j\nchannel app=m from=j to=k",
    "app name=r\nprocess app=r id=s behavior=source(count=5)\nprocess app=r id=f behavior=fork\nprocess app=r id=k1 behavior=sink\nprocess app=r id=k2 behavior=sink\nprocess app=r id=k3 behavior=raster_sink\nchannel app=r from=s to=f\nchannel app=r from=f to=k1\nchannel app=r from=f to=k2\nchannel app=r from=f to=k3",
    "app name=l\nprocess app=l id=s behavior=source(count=5)\nprocess app=l id=t behavior=lookup(table=0)\nprocess app=l id=k behavior=sink\nchannel app=l from=s to=t capacity=1000\nchannel app=l from=t to=k",
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k\nstate name=only apps=p\ninitial state=only",
    "app name=p critical=true spares=1\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k",
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k\ntrigger at=0 event=stop(p)\ntrigger at=0 event=stop(p)",
    "app name=p\nprocess app=p id=s behavior=source(count=3)\nprocess app=p id=k behavior=sink\nchannel app=p from=s to=k\nstate name=s1 apps=p\nstate name=s2 apps=p\nstate name=s3 apps=\ninitial state=s2\ntransition from=s1 event=stop(p) to=s3\ntransition from=s2 event=stop(p) to=s3\ntransition from=s3 event=start(p) to=s1",
    "app name=a\nprocess app=a id=s behavior=source(count=10) weight=1\nprocess app=a id=m behavior=affine(mul=0,add=0) weight=2\nprocess app=a id=k behavior=sink weight=3\nchannel app=a from=s to=m\nchannel app=a from=m to=k",
];

fn fault_fixed_point(text: &str) -> Result<(), String> {
    let a = parse_fault_spec(text).map_err(|e| format!("{text:?}: {e}"))?;
    let printed = a.to_string();
    let b: FaultSpec = parse_fault_spec(&printed).map_err(|e| format!("reparse of {printed:?}: {e}"))?;
    if a != b {
        return Err(format!("{text:?} changed on round trip"));
    }
    if b.to_string() != printed {
        return Err(format!("{text:?}: printing is not a fixed point"));
    }
    Ok(())
}

fn app_fixed_point(text: &str) -> Result<(), String> {
    let a = parse_app_spec(text).map_err(|e| format!("{text:?}: {e}"))?;
    let printed = a.to_string();
    let b: AppSpec = parse_app_spec(&printed).map_err(|e| format!("reparse of {printed:?}: {e}"))?;
    if a != b {
        return Err(format!("{text:?} changed on round trip"));
    }
    if b.to_string() != printed {
        return Err(format!("{text:?}: printing is not a fixed point"));
    }
    Ok(())
}

#[test]
fn corpus_round_trips() {
    assert!(FAULTS.len() + APPS.len() >= 50);
    let errs: Vec<String> = FAULTS
        .iter()
        .map(|t| fault_fixed_point(t))
        .chain(APPS.iter().map(|t| app_fixed_point(t)))
        .filter_map(Result::err)
        .collect();
    assert!(errs.is_empty(), "{}", errs.join("\n"));
}

fn link() -> impl Strategy<Value = String> {
    (0u32..64, prop::sample::select(vec!["+x", "-x", "+y", "-y", "+z", "-z"]))
        .prop_map(|(r, d)| format!("link({r},{d})"))
}

fn fault_clause() -> impl Strategy<Value = String> {
    let instant = prop_oneof![
        (0u64..1 << 40).prop_map(|t| format!("at {t}")),
        (0u64..1 << 40, 1u64..1 << 20).prop_map(|(s, i)| format!("periodic {s},{i}")),
    ];
    let probe_when = prop_oneof![
        (0u64..1 << 40).prop_map(|t| format!("at {t}")),
        (0u64..1 << 30, 0u64..1 << 30).prop_map(|(a, len)| format!("window {a}..{}", a + len)),
    ];
    prop_oneof![
        (
            prop::sample::select(vec!["link_drop", "link_corrupt"]),
            link(),
            probe_when,
            0.0f64..=1.0,
            prop::option::of(any::<u64>())
        )
            .prop_map(|(k, l, w, p, s)| {
                let stream = s.map(|s| format!(" stream={s}")).unwrap_or_default();
                format!("kind={k} where={l} when={w} prob={p}{stream}")
            }),
        (link(), instant.clone()).prop_map(|(l, w)| format!("kind=link_kill where={l} when={w}")),
        (link(), instant.clone(), 1u32..64)
            .prop_map(|(l, w, f)| format!("kind=link_degrade where={l} when={w} factor={f}")),
        (prop::sample::select(vec!["tile_kill_host", "tile_kill_dnp"]), 0u32..64, instant.clone())
            .prop_map(|(k, r, w)| format!("kind={k} where=tile({r}) when={w}")),
        (0u32..64, instant, any::<u16>())
            .prop_map(|(r, w, c)| format!("kind=critical_event where=tile({r}) when={w} code={c}")),
    ]
}

fn fault_text() -> impl Strategy<Value = String> {
    (prop::option::of(any::<u64>()), prop::collection::vec(fault_clause(), 0..8)).prop_map(|(seed, cs)| {
        let mut t = seed.map(|s| format!("seed={s}\n")).unwrap_or_default();
        for c in cs {
            t.push_str(&c);
            t.push('\n');
        }
        t
    })
}

fn stage() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("identity".to_string()),
        (any::<u64>(), any::<u64>()).prop_map(|(m, a)| format!("affine(mul={m},add={a})")),
        prop::collection::vec(any::<u64>(), 1..6).prop_map(|t| {
            let t: Vec<String> = t.iter().map(u64::to_string).collect();
            format!("lookup(table={})", t.join(":"))
        }),
    ]
}

/// A pipeline app: source, some stages, a sink; optionally a second app and
/// a scenario that switches it on and off.
fn app_text() -> impl Strategy<Value = String> {
    (
        "[a-z][a-z0-9_]{0,6}",
        any::<bool>(),
        0usize..3,
        (0u64..1000, 0u64..1000, 0u64..10),
        prop::collection::vec((stage(), 1u64..100, 0usize..9), 0..5),
        any::<bool>(),
        prop::collection::vec(0u64..1 << 30, 0..4),
    )
        .prop_map(|(name, critical, spares, (count, start, step), stages, scenario, triggers)| {
            let mut t = format!("app name={name} critical={critical} spares={spares}\n");
            t += &format!("process app={name} id=src behavior=source(count={count},start={start},step={step})\n");
            let mut prev = "src".to_string();
            let mut chans = String::new();
            for (i, (b, w, cap)) in stages.iter().enumerate() {
                let id = format!("s{i}");
                t += &format!("process app={name} id={id} behavior={b} weight={w}\n");
                chans += &format!("channel app={name} from={prev} to={id} capacity={cap}\n");
                prev = id;
            }
            t += &format!("process app={name} id=out behavior=sink\n");
            chans += &format!("channel app={name} from={prev} to=out\n");
            t += &chans;
            if scenario {
                t += &format!("state name=off apps=\nstate name=on apps={name}\ninitial state=off\n");
                t += &format!(
                    "transition from=off event=start({name}) to=on\ntransition from=on event=stop({name}) to=off\n"
                );
                for (i, at) in triggers.iter().enumerate() {
                    let ev = if i % 2 == 0 { "start" } else { "stop" };
                    t += &format!("trigger at={at} event={ev}({name})\n");
                }
            }
            t
        })
}

proptest! {
    #[test]
    fn generated_fault_specs_round_trip(text in fault_text()) {
        prop_assert_eq!(fault_fixed_point(&text), Ok(()));
    }

    #[test]
    fn generated_app_specs_round_trip(text in app_text()) {
        prop_assert_eq!(app_fixed_point(&text), Ok(()));
    }

    #[test]
    fn fault_parser_never_panics(text in "[ -~\n]{0,120}") {
        let _ = parse_fault_spec(&text);
    }

    #[test]
    fn app_parser_never_panics(text in "[ -~\n]{0,120}") {
        let _ = parse_app_spec(&text);
    }
}
